fn main() {
    std::process::exit(defect_edf::cli::main_with_args(std::env::args_os()));
}
