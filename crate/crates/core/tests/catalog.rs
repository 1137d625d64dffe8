use std::collections::BTreeSet;

use needle_core::catalog::{Catalog, DirectoryId, ImageCandidate, ImageId, IndexState};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Register(usize),
    Upsert { dir: usize, file: u8, hash: u64 },
    Index { nth: usize },
    Remove { nth: usize },
    RemoveDir(usize),
    Toggle(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..3).prop_map(Op::Register),
        (0usize..3, 0u8..12, 0u64..3).prop_map(|(dir, file, hash)| Op::Upsert { dir, file, hash }),
        any::<usize>().prop_map(|nth| Op::Index { nth }),
        any::<usize>().prop_map(|nth| Op::Remove { nth }),
        (0usize..3).prop_map(Op::RemoveDir),
        (0usize..3).prop_map(Op::Toggle),
    ]
}

fn apply(cat: &Catalog, roots: &[std::path::PathBuf], ops: &[Op]) {
    let dir_id = |i: usize| -> Option<DirectoryId> {
        let canonical = std::fs::canonicalize(&roots[i]).unwrap();
        cat.directories()
            .unwrap()
            .into_iter()
            .find(|d| d.path == canonical)
            .map(|d| d.id)
    };
    let all_ids = || -> Vec<ImageId> {
        cat.directories()
            .unwrap()
            .iter()
            .flat_map(|d| cat.images_in(d.id).unwrap())
            .map(|r| r.id)
            .collect()
    };
    for op in ops {
        match *op {
            Op::Register(i) => {
                cat.register_directory(&roots[i]).unwrap();
            }
            Op::Upsert { dir, file, hash } => {
                if let Some(id) = dir_id(dir) {
                    cat.upsert_image(&ImageCandidate {
                        directory_id: id,
                        relative_path: format!("sub/{file}.png"),
                        content_hash: hash,
                        byte_size: 100 + hash,
                        mtime_ms: 5,
                    })
                    .unwrap();
                }
            }
            Op::Index { nth } => {
                let ids = all_ids();
                if !ids.is_empty() {
                    cat.set_state(ids[nth % ids.len()], "e1", IndexState::Indexed)
                        .unwrap();
                }
            }
            Op::Remove { nth } => {
                let ids = all_ids();
                if !ids.is_empty() {
                    cat.remove_image(ids[nth % ids.len()]).unwrap();
                }
            }
            Op::RemoveDir(i) => {
                if let Some(id) = dir_id(i) {
                    cat.remove_directory(id).unwrap();
                }
            }
            Op::Toggle(i) => {
                if let Some(id) = dir_id(i) {
                    let enabled = cat.directory(id).unwrap().unwrap().enabled;
                    cat.set_directory_enabled(id, !enabled).unwrap();
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reopen_and_import_reproduce_the_export(ops in prop::collection::vec(op(), 1..40)) {
        let tmp = tempfile::tempdir().unwrap();
        let roots: Vec<_> = (0..3).map(|i| {
            let p = tmp.path().join(format!("d{i}"));
            std::fs::create_dir(&p).unwrap();
            p
        }).collect();
        let db = tmp.path().join("catalog.db");
        let exported = {
            let cat = Catalog::open(&db).unwrap();
            cat.set_embedders(&["e1".into(), "e2".into()]).unwrap();
            apply(&cat, &roots, &ops);

            // uniqueness of (directory, relative path)
            let mut keys = BTreeSet::new();
            let mut records = 0;
            for d in cat.directories().unwrap() {
                let imgs = cat.images_in(d.id).unwrap();
                prop_assert_eq!(d.image_count as usize, imgs.len());
                for r in imgs {
                    keys.insert((r.directory_id, r.relative_path));
                    records += 1;
                }
            }
            prop_assert_eq!(keys.len(), records);
            prop_assert_eq!(cat.image_count().unwrap() as usize, records);
            cat.export_string().unwrap()
        };

        let reopened = Catalog::open(&db).unwrap();
        prop_assert_eq!(&reopened.export_string().unwrap(), &exported);

        let imported = Catalog::in_memory().unwrap();
        imported.import(exported.as_bytes()).unwrap();
        prop_assert_eq!(imported.export_string().unwrap(), exported);
    }
}

#[test]
fn export_lines_are_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = Catalog::in_memory().unwrap();
    cat.set_embedders(&["grid64".into()]).unwrap();
    let (d, _) = cat.register_directory(tmp.path()).unwrap();
    cat.upsert_image(&ImageCandidate {
        directory_id: d.id,
        relative_path: "a.png".into(),
        content_hash: 0xdead_beef,
        byte_size: 3,
        mtime_ms: 9,
    })
    .unwrap();
    let text = cat.export_string().unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(kinds, ["header", "embedder", "directory", "image"]);
    assert!(text.contains("\"content_hash\":\"00000000deadbeef\""));
    assert!(matches!(
        Catalog::in_memory().unwrap().import("{\"kind\":\"image\"}\n".as_bytes()),
        Err(needle_core::catalog::CatalogError::Import { line: 1, .. })
    ));
}
