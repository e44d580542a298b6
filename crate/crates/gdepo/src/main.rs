fn main() {
    std::process::exit(gdepo::cli::cli_entry(std::env::args()));
}
