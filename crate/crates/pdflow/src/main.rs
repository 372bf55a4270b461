fn main() {
    std::process::exit(pdflow::cli::cli_main(std::env::args_os()));
}
