//! Robot autonomy: layered costmap, global grid planner, sampling-based
//! local controller, and the per-tick composition of the three.

pub mod costmap;
pub mod local;
pub mod planner;
pub mod robot;

pub use costmap::{Costmap, GridGeometry, InflationParams, SocialLayerParams, LETHAL};
pub use local::{local_control, LocalParams, RobotCommand};
pub use planner::{plan_global, PlanError, PlanPath, Planner};
pub use robot::{robot_tick, NavEvent, NavParams, NavState, NavStatus};
