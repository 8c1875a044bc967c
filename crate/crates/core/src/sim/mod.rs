//! Seeded generators for the three stochastic processes.
//!
//! Episode `i` of a dataset generated with seed `s` draws from
//! `RngState::new(s, i)`, so any episode can be regenerated on its own.

mod episode;
mod fluid;
mod hierarchical;
mod maze;

pub use episode::{Episode, Labels, Process};
pub use fluid::{
    field_to_distribution, fluid_step, initial_field, simulate_fluid_episode, EpisodeNormalizer,
    FluidField, FluidParams,
};
pub use hierarchical::{sample_hierarchical_episode, sample_hierarchical_point, HierarchicalParams};
pub use maze::{choose_heading, simulate_maze_episode, Heading, MazeEvent, MazeSpec};

use crate::error::Result;
use crate::numeric::RngState;

/// Default episode length per process when generating datasets.
pub fn default_episode_len(process: Process) -> usize {
    match process {
        Process::Hierarchical => 100,
        Process::Maze => 200,
        Process::Fluid => FluidParams::default().steps,
    }
}

/// Episode `id` of a dataset with the given seed.
pub fn generate_episode(process: Process, seed: u64, id: u64, len: usize) -> Result<Episode> {
    let mut rng = RngState::new(seed, id);
    let mut ep = match process {
        Process::Hierarchical => {
            sample_hierarchical_episode(&mut rng, &HierarchicalParams::default(), len)?
        }
        Process::Maze => simulate_maze_episode(&mut rng, &MazeSpec::lattice(5, 4), len)?,
        Process::Fluid => {
            let params = FluidParams {
                steps: len,
                ..FluidParams::default()
            };
            simulate_fluid_episode(&mut rng, &params)?
        }
    };
    ep.id = id;
    ep.seed = seed;
    Ok(ep)
}
