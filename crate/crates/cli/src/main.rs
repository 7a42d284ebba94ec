fn main() {
    std::process::exit(dfp_cli::cli_main(std::env::args_os()));
}
