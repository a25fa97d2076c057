fn main() {
    std::process::exit(matchbias::cli::run(std::env::args_os()));
}
