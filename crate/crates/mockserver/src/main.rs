//! Standalone mock server for manual testing.
//!
//! omlclient-mockserver [--fixtures DIR] [--addr HOST:PORT]

use std::path::PathBuf;

fn main() {
    let mut fixtures = omlclient_mockserver::bundled_fixtures();
    let mut addr = "127.0.0.1:0".to_string();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match (arg.as_str(), args.next()) {
            ("--fixtures", Some(v)) => fixtures = PathBuf::from(v),
            ("--addr", Some(v)) => addr = v,
            _ => {
                eprintln!("usage: omlclient-mockserver [--fixtures DIR] [--addr HOST:PORT]");
                std::process::exit(2);
            }
        }
    }
    let server = match omlclient_mockserver::MockServer::start_on(&fixtures, &addr) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!("{}", server.base_url());
    loop {
        std::thread::park();
    }
}
