use clap::Parser;
use wemeval::Cli;

fn main() {
    let cli = Cli::parse();
    let code = match wemeval::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}
