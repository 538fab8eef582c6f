fn main() {
    std::process::exit(reba_core::cli::run_cli(std::env::args_os()));
}
