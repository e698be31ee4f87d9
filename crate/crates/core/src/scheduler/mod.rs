//! Day-ahead bidding, real-time dispatch, the tank baseline and price response.

pub mod bid;
pub mod dispatch;
pub mod market;
pub mod model;
pub mod pricing;

pub use bid::{optimize_bid, solve_bid, solve_bid_extensive, tank_bid, BendersOptions, BidInputs, BidSolution};
pub use dispatch::{
    advance, dispatch_realtime, forced_plan, initial_states, plan_load, simulate, DispatchContext, DispatchMode,
    DispatchRun, States,
};
pub use market::{round_bid, settlement_cost, Market, MarketPrices, Settlement, SettlementRow};
pub use model::{build_flex, Affine, ClusterKey, FlexModel, Forecast, ModelKind, ModelOptions, Window};
pub use pricing::price_response;
