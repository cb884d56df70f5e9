fn main() {
    std::process::exit(tgi_cli::main_with(std::env::args_os()));
}
