fn main() {
    std::process::exit(delayfb_cli::run(std::env::args_os()));
}
