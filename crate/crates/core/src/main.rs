use clap::Parser;

fn main() {
    let cli = freqcast::cli::Cli::parse(); // usage errors exit 2 via clap
    match freqcast::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(freqcast::cli::exit_code(&err));
        }
    }
}
