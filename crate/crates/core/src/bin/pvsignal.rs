fn main() {
    std::process::exit(pvsignal::cli::run(std::env::args_os().skip(1)));
}
