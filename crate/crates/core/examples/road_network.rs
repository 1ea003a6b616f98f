//! Builds the Manhattan grid, lists the exits of one road and round-trips JSON.

use hgmm::models::{ManhattanGrid, RoadNetwork};

fn main() -> hgmm::Result<()> {
    let grid = ManhattanGrid::default();
    let net = grid.build()?;
    println!("{} segments", net.segments().len());
    let road = ManhattanGrid::road_id(0, 1, 'E');
    let seg = net.segment(&road)?;
    println!("{road}: length {:.1} m, exits {:?}", seg.centerline.length(), seg.successors);
    for s in &seg.successors {
        let c = net.segment(s)?;
        println!("  {s}: length {:.1} m -> {:?}", c.centerline.length(), c.successors);
    }
    let back = RoadNetwork::from_json(&net.to_json())?;
    println!("json round trip equal: {}", back == net);
    Ok(())
}
