//! Writes a small phantom dataset as NIfTI files with a manifest, then
//! loads it back the way training does.
//!
//! Usage: `phantom_dataset [OUT_DIR]` (defaults to a temporary directory).

use std::path::PathBuf;

use dico::cli::write_phantoms;
use dico::data::{read_manifest, Dataset, Normalization, PhantomSpec};

fn main() -> dico::error::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let spec = PhantomSpec { grid: [16, 16, 16], seed: 3, ..PhantomSpec::default() };
    let records = write_phantoms(&out, &spec, [2, 4, 1, 1])?;
    println!("wrote {} cases to {}", records.len(), out.display());
    print!("{}", std::fs::read_to_string(out.join("manifest.txt")).expect("manifest written"));

    let ds = Dataset::from_records(&read_manifest(&out.join("manifest.txt"))?, Normalization::ZScore)?;
    println!(
        "labeled {}, unlabeled {}, val {}, test {}",
        ds.labeled.len(),
        ds.unlabeled.len(),
        ds.val.len(),
        ds.test.len()
    );
    for case in &ds.labeled {
        let fg = case.label.as_ref().map_or(0, |l| l.foreground_count());
        println!("{}: grid {:?}, {fg} vessel voxels", case.id, case.image.spatial());
    }
    Ok(())
}
