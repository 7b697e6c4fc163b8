fn main() {
    std::process::exit(dcc::cli::cli_main(std::env::args()));
}
