"""Regenerate the bundled example datasets in src/svyadjust/data."""

from pathlib import Path

from svyadjust.io import write_dataset
from svyadjust.simulation import (
    PopulationSpec,
    draw_pps_sample,
    draw_srs_sample,
    generate_population,
)

DATA = Path(__file__).resolve().parent.parent / "src" / "svyadjust" / "data"

if __name__ == "__main__":
    DATA.mkdir(exist_ok=True)
    small = generate_population(PopulationSpec(N=5000, G=5, group_sizes=(1600, 1300, 1000, 700, 400), seed=11))
    write_dataset(DATA / "tiny.csv", draw_srs_sample(small, n_clusters=10, cluster_size=5, seed=12))
    pop = generate_population(PopulationSpec(seed=21))
    write_dataset(DATA / "pps_demo.csv", draw_pps_sample(pop, n_clusters=100, cluster_size=10, seed=22))
