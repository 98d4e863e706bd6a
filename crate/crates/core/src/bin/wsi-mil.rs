fn main() {
    std::process::exit(wsi_mil::cli::main());
}
