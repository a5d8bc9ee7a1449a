fn main() {
    std::process::exit(refcomp::cli::run(std::env::args_os()));
}
