//! Generates a small dataset into a directory (a temporary one unless a
//! path is given) and prints its manifest summary.
//!
//! `cargo run --release --example gen_data -- /tmp/dhmp-data`

use dhmp::oracle::{make_dataset, Dataset, DatasetConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    let config = DatasetConfig {
        train: 8,
        val: 2,
        test: 2,
        ood: 1,
        ..Default::default()
    };
    make_dataset(&config, 42, &dir)?;
    let ds = Dataset::open(&dir)?;
    ds.verify()?;
    for split in Split::ALL {
        let files = ds.manifest.files(split);
        let nodes: Vec<usize> = files.iter().map(|f| f.nodes).collect();
        println!("{split:>5}: {} trajectories, nodes {nodes:?}", files.len());
    }
    let stats = ds.norm_stats();
    println!(
        "input mean {:?} std {:?}",
        stats.inputs.mean, stats.inputs.std
    );
    println!("target std {:?}", stats.targets.std);
    println!("written to {}", dir.display());
    Ok(())
}
