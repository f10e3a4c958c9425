//! Flat key=value configuration with command-line style overrides.
//!
//! cargo run --example config_files

use crossview::config::Config;

fn main() {
    let text = "# smaller batches\nsampler.batch_size = 32\nsampler.picks_per_anchor = 16\n";
    let cfg = Config::parse_str(text, &["train.epochs=10".into()]).expect("valid config");
    println!("batch {} / picks {} / epochs {}", cfg.sampler().batch_size, cfg.sampler().picks_per_anchor, cfg.train.epochs);
    println!("config hash {}", cfg.hash());

    let again = Config::parse_str(&cfg.to_text(), &[]).expect("serialised config parses");
    assert_eq!(again, cfg);

    for bad in ["sampler.picks_per_anchor=3", "train.epochs=many", "trian.epochs=3"] {
        let err = Config::parse_str(bad, &[]).unwrap_err();
        println!("{bad:<28} -> {err} (exit code {})", err.exit_code());
    }
}
