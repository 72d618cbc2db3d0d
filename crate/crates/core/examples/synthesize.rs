//! Regenerates the bundled synthetic corpora.
//!
//! Usage: `cargo run -p spokenparse --example synthesize -- [DIR]`
//! (default `data/synthetic`).

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".into());
    spokenparse::synthetic::write_bundle(std::path::Path::new(&dir))?;
    println!("wrote {dir}");
    Ok(())
}
