//! Text outputs pinned against checked-in files. Set `UPDATE_GOLDEN=1`
//! to rewrite them.

mod common;

use std::path::PathBuf;

use dlg_core::analysis::{analyze, dump_table};
use dlg_core::distributed::emit_spmd_source;
use dlg_core::pipeline::{lower_source, spmd_source};

fn compare(file: &str, actual: &str) {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(file);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(&p, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&p).unwrap_or_else(|_| panic!("missing {}", p.display()));
    assert_eq!(expected, actual, "{file} changed");
}

#[test]
fn distribution_tables() {
    for name in common::FIXTURES {
        let f = lower_source(&common::source(name)).unwrap();
        compare(&format!("{name}.dist.txt"), &dump_table(&analyze(&f).unwrap()));
    }
}

#[test]
fn spmd_pseudo_source() {
    for name in ["logistic_regression", "kmeans", "kernel_density"] {
        let (_, p) = spmd_source(&common::source(name)).unwrap();
        compare(&format!("{name}.spmd.txt"), &emit_spmd_source(&p));
    }
}
