fn main() {
    std::process::exit(cgce_cli::run(std::env::args_os()));
}
