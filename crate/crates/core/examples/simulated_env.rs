//! Generate a retrieval environment and walk one task by hand.
//!
//! cargo run --example simulated_env

use acon::sim::{generate, EnvState, Environment, GenParams, ScriptedAgent};
use acon::tokens::WordSymbolTokenizer;

fn main() -> acon::Result<()> {
    let spec = generate(&GenParams {
        tasks: 2,
        objectives: 3,
        padding: 20,
        ..GenParams::default()
    });
    spec.validate()?;
    println!(
        "{} documents, tasks {:?}",
        spec.corpus.len(),
        spec.task_ids()
    );

    let tok = WordSymbolTokenizer;
    let task_id = &spec.task_ids()[0];
    let env = Environment::new(&spec, task_id, &tok)?;
    println!("{}\n", env.instruction());

    // An oracle agent knows the answers and needs no searches.
    let agent = ScriptedAgent::oracle(&spec);
    let mut state = EnvState::default();
    let mut context = env.instruction();
    while !state.terminated {
        let action = agent.next_action(&context);
        let (next, obs) = env.step(&state, &action)?;
        println!("> {action}\n{obs}");
        context.push_str(&format!("\n\nAction: {action}\nObservation: {obs}"));
        state = next;
    }
    println!("reward {}", env.reward(&state)?);

    let q = &spec.task(task_id)?.objectives[0].question;
    let (_, obs) = env.step(&EnvState::default(), &format!("search({q})"))?;
    println!("\nsearch for {q:?}:\n{obs}");
    Ok(())
}
