//! Builds the static (BFS stride-2) hierarchy of a grid mesh level by level
//! and shows how the hop count of the edge enhancement changes the coarse
//! graphs.

use dhmp::mesh::{component_count, generate_grid_mesh, k_hop_closure, restrict_to_selected};
use dhmp::model::{static_selection, LevelGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = generate_grid_mesh(10, 10, 0.15, 3)?;
    println!(
        "input mesh: {} nodes, {} directed edges (self-loops included), max degree {}",
        mesh.node_count,
        mesh.edges.len(),
        mesh.max_degree()
    );
    for k in 1..=3 {
        let mut graph = LevelGraph::from_mesh(&mesh);
        print!("K={k}:");
        for _ in 0..3 {
            let keep = static_selection(&graph);
            let enhanced = k_hop_closure(&graph.edges, graph.node_count, k)?;
            let coarse = restrict_to_selected(&enhanced, &keep)?;
            print!(
                "  {} nodes / {} edges / {} component(s)",
                coarse.node_count(),
                coarse.edges.len(),
                component_count(&coarse.edges, coarse.node_count())
            );
            graph = graph.coarsen(&coarse);
        }
        println!();
    }
    Ok(())
}
