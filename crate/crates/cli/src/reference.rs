//! Markdown flag reference generated from the clap definitions.

use clap::CommandFactory;

use crate::Cli;

pub fn markdown() -> String {
    let mut out = String::from("# bxrl command reference\n\n");
    out.push_str(&format!(
        "Runs default to `${}/seed_<seed>` (or `runs/seed_<seed>` when unset).\n\n",
        crate::RUN_ROOT_ENV
    ));
    render(&Cli::command(), "bxrl", &mut out);
    out
}

fn render(cmd: &clap::Command, path: &str, out: &mut String) {
    let subs: Vec<&clap::Command> = cmd.get_subcommands().filter(|s| s.get_name() != "help").collect();
    let args: Vec<&clap::Arg> = cmd
        .get_arguments()
        .filter(|a| !a.is_positional() && !matches!(a.get_id().as_str(), "help" | "version"))
        .collect();
    if !args.is_empty() || subs.is_empty() {
        out.push_str(&format!("## `{path}`\n\n"));
        if let Some(about) = cmd.get_about() {
            out.push_str(&format!("{about}\n\n"));
        }
        if !args.is_empty() {
            out.push_str("| flag | default | description |\n|---|---|---|\n");
        }
        for a in args {
            let flag = a
                .get_long()
                .map(|l| format!("--{l}"))
                .unwrap_or_else(|| a.get_id().to_string());
            let defaults: Vec<String> = a
                .get_default_values()
                .iter()
                .map(|v| v.to_string_lossy().into_owned())
                .collect();
            let mut help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
            let values: Vec<String> = a
                .get_possible_values()
                .iter()
                .map(|v| v.get_name().to_string())
                .collect();
            if !values.is_empty() && a.get_action().takes_values() {
                help.push_str(&format!(". One of: {}", values.join(", ")));
            }
            out.push_str(&format!("| `{flag}` | {} | {help} |\n", defaults.join(",")));
        }
        out.push('\n');
    }
    for s in subs {
        render(s, &format!("{path} {}", s.get_name()), out);
    }
}
