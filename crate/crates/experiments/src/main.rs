fn main() {
    std::process::exit(experiments::cli::cli_main(std::env::args_os()));
}
