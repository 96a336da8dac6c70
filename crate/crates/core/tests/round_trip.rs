use l2r::eval::{boundary_at_share, split_train_test};
use l2r::ingest::{
    generate_synthetic, load_road_network, load_trajectories, write_road_network, write_trajectories, RoadTypePlan,
    SyntheticConfig,
};
use l2r::model::{build_model, BuildOptions, Model};
use l2r::netmodel::{FuelModel, VertexId};
use l2r::router::Router;

fn config() -> SyntheticConfig {
    SyntheticConfig {
        grid_rows: 12,
        grid_cols: 15,
        road_type_plan: RoadTypePlan {
            motorway_rows: vec![4],
            motorway_cols: vec![9],
            ..RoadTypePlan::default()
        },
        block_rows: 2,
        block_cols: 2,
        trajectory_count: 250,
        ..SyntheticConfig::default()
    }
}

#[test]
fn files_reproduce_the_generated_world() {
    let world = generate_synthetic(&config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges, trajs) = (dir.path().join("n.csv"), dir.path().join("e.csv"), dir.path().join("t.jsonl"));
    write_road_network(&world.network, &nodes, &edges).unwrap();
    write_trajectories(&world.network, &world.trajectories, &trajs).unwrap();

    let net = load_road_network(&nodes, &edges, FuelModel::default()).unwrap();
    assert_eq!(net.vertex_count(), world.network.vertex_count());
    assert_eq!(net.edge_count(), world.network.edge_count());
    let (loaded, report) = load_trajectories(&trajs, &net, None).unwrap();
    assert!(report.rejects.is_empty());
    assert_eq!(report.accepted, world.trajectories.len());
    for (a, b) in loaded.iter().zip(&world.trajectories) {
        assert_eq!((a.traj_id, a.driver_id, a.departure), (b.traj_id, b.driver_id, b.departure));
        let ids = |net: &l2r::netmodel::RoadNetwork, t: &l2r::netmodel::Trajectory| -> Vec<i64> {
            t.path.vertices().iter().map(|&v| net.original_id(v)).collect()
        };
        assert_eq!(ids(&net, a), ids(&world.network, b));
    }
}

#[test]
fn saved_model_answers_queries_identically() {
    let world = generate_synthetic(&config()).unwrap();
    let boundary = boundary_at_share(&world.trajectories, 0.8).unwrap();
    let (train, _) = split_train_test(&world.trajectories, boundary);
    let mut model = build_model(world.network.clone(), &train, BuildOptions::default()).unwrap();
    model.transfer_default().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();

    let (a, b) = (Router::new(&model.network, &model.graph), Router::new(&back.network, &back.graph));
    let n = model.network.vertex_count() as u32;
    for i in 0..200u32 {
        let (s, d) = (VertexId(i * 7 % n), VertexId((i * 13 + 5) % n));
        let (ra, rb) = (a.route(s, d, None), b.route(s, d, None));
        match (ra, rb) {
            (Ok(x), Ok(y)) => assert_eq!(x, y),
            (x, y) => assert_eq!(x.is_err(), y.is_err()),
        }
    }
}
