fn main() {
    std::process::exit(afttest::cli::cli_main(std::env::args_os()));
}
