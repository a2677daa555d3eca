fn main() {
    std::process::exit(trigeval::run_cli(std::env::args_os()));
}
