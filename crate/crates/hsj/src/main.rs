use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = hsj::cli::Cli::parse();
    match hsj::cli::run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
