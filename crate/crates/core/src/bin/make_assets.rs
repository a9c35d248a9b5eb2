//! Regenerates the committed asset OBJs from the built-in generators.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use handmesh::mesh::template::box_mesh;
use handmesh::mesh::{hand_template, obj};

#[derive(Parser)]
#[command(name = "make-assets", about = "Write the shipped template and object meshes")]
struct Cli {
    #[arg(long, default_value = "assets")]
    out: PathBuf,
}

fn run(cli: &Cli) -> Result<(), Box<dyn std::error::Error>> {
    let template_dir = cli.out.join("template");
    let object_dir = cli.out.join("objects");
    std::fs::create_dir_all(&template_dir)?;
    std::fs::create_dir_all(&object_dir)?;

    let hand = hand_template();
    obj::write_obj(&template_dir.join("hand.obj"), &hand.mesh)?;
    // Half-extents match the rigid bar the scene generator poses.
    obj::write_obj(&object_dir.join("bar.obj"), &box_mesh(0.100, 0.015, 0.015))?;

    println!(
        "wrote {} ({} vertices) and {}",
        template_dir.join("hand.obj").display(),
        hand.mesh.vertex_count(),
        object_dir.join("bar.obj").display(),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
