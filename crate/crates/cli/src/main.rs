fn main() {
    std::process::exit(crowdseg_cli::run(std::env::args_os()));
}
