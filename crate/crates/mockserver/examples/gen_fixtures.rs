//! Regenerates the bundled fixture directory.
//!
//! cargo run -p omlclient-mockserver --example gen_fixtures [DIR]

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(omlclient_mockserver::bundled_fixtures);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("remove old fixtures");
    }
    let written = omlclient_mockserver::fixtures::write_bundled(&dir).expect("write fixtures");
    println!("wrote {} files to {}", written.len(), dir.display());
}
