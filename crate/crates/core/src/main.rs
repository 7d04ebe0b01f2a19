fn main() {
    std::process::exit(concept_align::cli::run(std::env::args_os()));
}
