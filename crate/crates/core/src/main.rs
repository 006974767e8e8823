use clap::Parser;

use hgtdp::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e);
            e.exit_code()
        }
    };
    std::process::exit(code);
}
