fn main() {
    std::process::exit(taborder_cli::run(std::env::args_os()));
}
