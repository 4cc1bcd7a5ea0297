fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(wpb::harness::cli::cli_main(&args));
}
