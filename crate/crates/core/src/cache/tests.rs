use std::cell::Cell;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use super::*;

// Published test vectors for MD5.
const MD5_ABC: &str = "900150983cd24fb0d6963f7d28e17f72";
const MD5_EMPTY: &str = "d41d8cd98f00b204e9800998ecf8427e";

fn tmp_cfg(offline: bool) -> (tempfile::TempDir, CacheConfig) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CacheConfig::new(dir.path(), offline);
    (dir, cfg)
}

#[test]
fn md5_vectors() {
    assert_eq!(md5_hex(b"abc"), MD5_ABC);
    assert_eq!(md5_hex(b""), MD5_EMPTY);
}

#[test]
fn layout() {
    assert_eq!(
        cache_path("www.openml.org", EntityKind::Dataset, &6.into(), Artifact::Payload),
        PathBuf::from("www.openml.org/dataset/6/payload.arff")
    );
    assert_eq!(
        cache_path("h", EntityKind::Task, &6.into(), Artifact::Splits),
        PathBuf::from("h/task/6/splits.arff")
    );
    assert_eq!(
        cache_path("h", EntityKind::Suite, &"OpenML-CC18".into(), Artifact::Description),
        PathBuf::from("h/suite/OpenML-CC18/description.xml")
    );
}

#[test]
fn second_fetch_is_a_hit() {
    let (_d, cfg) = tmp_cfg(false);
    let rel = PathBuf::from("h/dataset/1/payload.arff");
    let calls = Cell::new(0);
    let fetch = || {
        calls.set(calls.get() + 1);
        Ok(b"abc".to_vec())
    };
    assert_eq!(fetch_cached(&cfg, &rel, Some(MD5_ABC), fetch).unwrap(), b"abc");
    calls.set(0);
    let fetch = || {
        calls.set(calls.get() + 1);
        Ok(b"abc".to_vec())
    };
    assert_eq!(fetch_cached(&cfg, &rel, Some(MD5_ABC), fetch).unwrap(), b"abc");
    assert_eq!(calls.get(), 0);
}

#[test]
fn offline_miss_names_the_key() {
    let (_d, cfg) = tmp_cfg(true);
    let rel = PathBuf::from("h/task/6/description.xml");
    let err = fetch_cached(&cfg, &rel, None, || panic!("fetcher must not run offline")).unwrap_err();
    match err {
        CacheError::Offline(key) => assert!(key.contains("task") && key.contains('6'), "{key}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_remote_checksum_writes_nothing() {
    let (_d, cfg) = tmp_cfg(false);
    let rel = PathBuf::from("h/dataset/1/payload.arff");
    let err = fetch_cached(&cfg, &rel, Some(MD5_ABC), || Ok(b"abd".to_vec())).unwrap_err();
    assert!(matches!(err, CacheError::Checksum { .. }));
    assert!(!cfg.root_dir.join(&rel).exists());
}

#[test]
fn corrupted_entry_is_refetched_once() {
    let (_d, cfg) = tmp_cfg(false);
    let rel = PathBuf::from("h/dataset/1/payload.arff");
    write_atomic(&cfg.root_dir.join(&rel), b"ab").unwrap();
    let calls = Cell::new(0);
    let bytes = fetch_cached(&cfg, &rel, Some(MD5_ABC), || {
        calls.set(calls.get() + 1);
        Ok(b"abc".to_vec())
    })
    .unwrap();
    assert_eq!((bytes.as_slice(), calls.get()), (&b"abc"[..], 1));
    assert_eq!(fs::read(cfg.root_dir.join(&rel)).unwrap(), b"abc");
}

#[test]
fn concurrent_fetchers_leave_one_valid_file() {
    let (_d, cfg) = tmp_cfg(false);
    let rel = PathBuf::from("h/dataset/9/payload.arff");
    let payload = vec![b'x'; 1 << 16];
    let sum = md5_hex(&payload);
    let calls = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                let got = fetch_cached(&cfg, &rel, Some(&sum), || {
                    calls.fetch_add(1, Ordering::SeqCst);
                    Ok(payload.clone())
                })
                .unwrap();
                assert_eq!(got, payload);
            });
        }
    });
    assert!(calls.load(Ordering::SeqCst) >= 1);
    assert_eq!(md5_hex(&fs::read(cfg.root_dir.join(&rel)).unwrap()), sum);
    let leftovers = fs::read_dir(cfg.root_dir.join("h/dataset/9")).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[test]
fn clear_by_kind_and_id() {
    let (_d, cfg) = tmp_cfg(false);
    for (kind, id) in [(EntityKind::Dataset, 1), (EntityKind::Dataset, 2), (EntityKind::Task, 1)] {
        write_atomic(&cfg.root_dir.join(cache_path("h", kind, &id.into(), Artifact::Description)), b"x").unwrap();
    }
    assert_eq!(clear(&cfg, Some("h"), Some(EntityKind::Dataset), Some(&1.into())).unwrap(), 1);
    assert_eq!(clear(&cfg, None, Some(EntityKind::Dataset), None).unwrap(), 1);
    assert_eq!(clear(&cfg, None, None, None).unwrap(), 1);
    assert_eq!(clear(&cfg, None, None, None).unwrap(), 0);
}

#[test]
fn online_root_must_be_writable() {
    let (_d, cfg) = tmp_cfg(false);
    assert!(cfg.validate().is_empty());
    let file = cfg.root_dir.join("f");
    fs::write(&file, b"").unwrap();
    assert!(!CacheConfig::new(file.join("sub"), false).validate().is_empty());
    assert!(CacheConfig::new(file.join("sub"), true).validate().is_empty());
}

fn arb_key() -> impl Strategy<Value = EntityKey> {
    prop_oneof![
        (1u64..50).prop_map(EntityKey::Id),
        "[a-zA-Z0-9/ %.-]{1,6}".prop_map(EntityKey::Alias),
        Just(EntityKey::Alias("..".into())),
        Just(EntityKey::Alias(".".into())),
    ]
}

proptest! {
    #[test]
    fn cache_path_is_injective(
        keys in proptest::collection::vec(
            ("[a-z0-9._]{1,6}", 0usize..5, arb_key(), 0usize..5), 1..40)
    ) {
        let artifacts = [Artifact::Description, Artifact::Payload, Artifact::Splits, Artifact::Features, Artifact::Predictions];
        let mut seen = std::collections::HashMap::new();
        for (host, k, key, a) in keys {
            // Alias keys that parse as numbers are ids.
            let key = match key { EntityKey::Alias(s) => EntityKey::from(s.as_str()), k => k };
            let p = cache_path(&host, EntityKind::ALL[k], &key, artifacts[a]);
            let input = (host, k, key, a);
            if let Some(prev) = seen.insert(p.clone(), input.clone()) {
                prop_assert_eq!(prev, input);
            }
        }
    }
}
