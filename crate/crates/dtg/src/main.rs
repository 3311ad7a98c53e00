fn main() {
    std::process::exit(dtg::cli::main_entry());
}
