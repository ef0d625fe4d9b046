//! Connection settings: flags, then `OMLCLIENT_*` variables, then the
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use omlclient::protocol::DEFAULT_SERVER;

pub const SERVER_ENV: &str = "OMLCLIENT_SERVER";
pub const APIKEY_ENV: &str = "OMLCLIENT_APIKEY";
pub const CACHEDIR_ENV: &str = omlclient::cache::CACHE_DIR_ENV;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub server: String,
    pub api_key: Option<String>,
    pub cache_dir: PathBuf,
    pub offline: bool,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub server: Option<String>,
    pub api_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub config: Option<PathBuf>,
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let key = k.trim();
        if !matches!(key, "server" | "apikey" | "cachedir") {
            return Err(format!("line {}: unknown key {key:?}", n + 1));
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn home(env: &BTreeMap<String, String>) -> PathBuf {
    env.get("HOME")
        .or_else(|| env.get("USERPROFILE"))
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn default_config_path(env: &BTreeMap<String, String>) -> PathBuf {
    home(env).join(".omlclient").join("config")
}

fn read_config(path: &Path, required: bool) -> Result<BTreeMap<String, String>, String> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_config(&text).map_err(|e| format!("{}: {e}", path.display())),
        Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

pub fn resolve(flags: &Overrides, env: &BTreeMap<String, String>) -> Result<Settings, String> {
    let file = match &flags.config {
        Some(p) => read_config(p, true)?,
        None => read_config(&default_config_path(env), false)?,
    };
    let env_value = |k: &str| env.get(k).filter(|v| !v.is_empty()).cloned();
    let pick = |flag: Option<String>, var: &str, key: &str| {
        flag.or_else(|| env_value(var)).or_else(|| file.get(key).cloned())
    };
    Ok(Settings {
        server: pick(flags.server.clone(), SERVER_ENV, "server").unwrap_or_else(|| DEFAULT_SERVER.to_string()),
        api_key: pick(flags.api_key.clone(), APIKEY_ENV, "apikey").filter(|k| !k.is_empty()),
        cache_dir: pick(flags.cache_dir.as_ref().map(|p| p.display().to_string()), CACHEDIR_ENV, "cachedir")
            .map(PathBuf::from)
            .unwrap_or_else(|| home(env).join(".omlclient").join("cache")),
        offline: flags.offline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_env_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("config");
        std::fs::write(&cfg, "# comment\nserver = http://file/api\napikey = filekey\ncachedir = /file/cache\n").unwrap();
        let env = BTreeMap::from([(SERVER_ENV.to_string(), "http://env/api".to_string())]);
        let flags = Overrides {
            config: Some(cfg.clone()),
            cache_dir: Some(PathBuf::from("/flag/cache")),
            ..Default::default()
        };
        let s = resolve(&flags, &env).unwrap();
        assert_eq!(s.server, "http://env/api");
        assert_eq!(s.api_key.as_deref(), Some("filekey"));
        assert_eq!(s.cache_dir, PathBuf::from("/flag/cache"));

        let flags = Overrides {
            server: Some("http://flag/api".into()),
            config: Some(cfg),
            ..Default::default()
        };
        assert_eq!(resolve(&flags, &env).unwrap().server, "http://flag/api");
    }

    #[test]
    fn defaults_come_from_home() {
        let dir = tempfile::tempdir().unwrap();
        let env = BTreeMap::from([("HOME".to_string(), dir.path().display().to_string())]);
        let s = resolve(&Overrides::default(), &env).unwrap();
        assert_eq!(s.server, DEFAULT_SERVER);
        assert_eq!(s.api_key, None);
        assert_eq!(s.cache_dir, dir.path().join(".omlclient/cache"));

        std::fs::create_dir_all(dir.path().join(".omlclient")).unwrap();
        std::fs::write(default_config_path(&env), "apikey = k\n").unwrap();
        assert_eq!(resolve(&Overrides::default(), &env).unwrap().api_key.as_deref(), Some("k"));
    }

    #[test]
    fn bad_config_lines_are_reported() {
        assert!(parse_config("server http://x").unwrap_err().contains("line 1"));
        assert!(parse_config("\nproxy = x").unwrap_err().contains("unknown key"));
        let missing = Overrides {
            config: Some(PathBuf::from("/definitely/not/here")),
            ..Default::default()
        };
        assert!(resolve(&missing, &BTreeMap::new()).is_err());
    }
}
