fn main() {
    std::process::exit(xslu::cli::run());
}
