fn main() {
    for (var, key) in [("PROFILE", "MVDR_PROFILE"), ("TARGET", "MVDR_TARGET")] {
        println!(
            "cargo:rustc-env={key}={}",
            std::env::var(var).unwrap_or_default()
        );
    }
}
