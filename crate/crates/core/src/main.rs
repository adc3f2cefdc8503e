fn main() {
    std::process::exit(paramsync::cli::cli_main(std::env::args_os()));
}
