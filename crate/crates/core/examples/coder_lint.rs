//! The static contract every generated analysis script must pass before it
//! reaches the executor.

use vivaldi::agents::coder_static_lint;

const SCRIPTS: &[(&str, &str)] = &[
    (
        "clean",
        "si = heart_rate['value'].values[-1] / systolic_bp['value'].values[-1]\n\
         result = {'shock_index': round(float(si), 2)}\n\
         interpretation = 'latest shock index'\n",
    ),
    ("import", "import numpy as np\nresult = {}\ninterpretation = ''\n"),
    ("rebinding input", "heart_rate = heart_rate.dropna()\nresult = {}\ninterpretation = ''\n"),
    ("import in a string", "note = 'import is fine inside strings'\nresult = {}\ninterpretation = note\n"),
];

fn main() {
    for (name, script) in SCRIPTS {
        match coder_static_lint(script) {
            Ok(()) => println!("{name:<20} accepted"),
            Err(violations) => {
                let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                println!("{name:<20} rejected: {}", list.join("; "));
            }
        }
    }
    let long = "x = 1\n".repeat(600);
    println!("{:<20} {:?}", "600 lines", coder_static_lint(&long).map_err(|v| v.len()));
}
