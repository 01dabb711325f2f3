//! Regenerates the committed fixtures: `cargo run -p scenedet --example make_fixtures -- fixtures`

use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    for (rel, bytes) in scenedet::fixtures::all() {
        let path = root.join(&rel);
        std::fs::create_dir_all(path.parent().expect("fixture paths have a directory"))?;
        scenedet::io::write_atomic(&path, &bytes)?;
        println!("{} ({} bytes)", path.display(), bytes.len());
    }
    Ok(())
}
