fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(sembcs_cli::run_cli(&args));
}
