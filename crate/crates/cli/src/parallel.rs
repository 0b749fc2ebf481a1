//! Rayon drivers for the embarrassingly parallel parts. Work is split into the
//! same fixed units the sequential core functions use and results are
//! collected in index order, so the thread count never changes the output.

use rayon::prelude::*;
use rayon::ThreadPool;

use pdstab_core::model::Dynamics;
use pdstab_core::montecarlo::{self, MsEstimate, Observable, SimConfig};
use pdstab_core::regions::{self, Grid, RegionId, RegionPoint};
use pdstab_core::{Bounds, Error, Gains};

pub fn pool(threads: Option<usize>) -> Result<ThreadPool, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err("threads must be at least 1".into());
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| e.to_string())
}

pub fn estimate<P: Dynamics + Sync + ?Sized>(
    pool: &ThreadPool,
    plant: &P,
    gains: &Gains,
    cfg: &SimConfig,
    observable: Observable,
) -> Result<MsEstimate, Error> {
    cfg.validate(plant.dim())?;
    let leaves = pool.install(|| {
        (0..montecarlo::block_count(cfg))
            .into_par_iter()
            .map(|b| montecarlo::simulate_block(plant, gains, cfg, observable, b))
            .collect::<Vec<_>>()
    });
    let acc = montecarlo::reduce_pairwise(leaves).expect("at least one trial");
    montecarlo::finish(cfg, acc)
}

pub fn sample_region(
    pool: &ThreadPool,
    region: RegionId,
    bounds: &Bounds,
    grid: &Grid,
) -> Result<Vec<RegionPoint>, Error> {
    let bx = regions::resolve_grid(bounds, grid)?;
    let nodes: Vec<Gains> = regions::grid_nodes(&bx, grid.nx, grid.ny).collect();
    Ok(pool.install(|| nodes.par_iter().map(|g| regions::evaluate_point(region, bounds, *g)).collect()))
}
