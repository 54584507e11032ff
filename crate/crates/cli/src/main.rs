fn main() {
    std::process::exit(pvguard_cli::run(std::env::args_os()));
}
