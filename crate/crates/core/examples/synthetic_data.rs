//! Generate a synthetic two-view dataset, write it to disk, and read it back.
//!
//! cargo run --example synthetic_data -- [out_dir]

use crossview::datasets::{generate_synthetic, load_manifest, read_embeddings, write_embeddings, write_manifest, SynthConfig};

fn main() -> crossview::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic".into());
    let cfg = SynthConfig {
        n_pairs: 500,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    std::fs::create_dir_all(&out).map_err(|e| crossview::Error::Io { path: out.clone().into(), source: e })?;
    let dir = std::path::Path::new(&out);
    write_manifest(&data.manifest, dir.join("manifest.jsonl"))?;
    write_embeddings(&data.query_features, dir.join("query.emb"))?;
    write_embeddings(&data.reference_features, dir.join("reference.emb"))?;

    let manifest = load_manifest(dir.join("manifest.jsonl"))?;
    let queries = read_embeddings(dir.join("query.emb"))?;
    assert_eq!(queries, data.query_features);

    let first = &manifest[0];
    println!("{} pairs, {}-dim views, written to {out}/", manifest.len(), queries.dim());
    println!(
        "{} at ({:.0} m, {:.0} m), semi-positives {:?}",
        first.id, first.coord.a, first.coord.b, first.semi_positives
    );
    Ok(())
}
