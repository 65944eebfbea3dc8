fn main() {
    std::process::exit(perceiver_dla::cli::run(std::env::args_os()));
}
