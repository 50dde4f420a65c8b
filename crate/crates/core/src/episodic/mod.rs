//! Episodic meta-learning: task sampling, prototypical and relation
//! losses, the classification baseline loss, and the training loop.

mod loss;
mod store;
mod train;

pub use loss::{
    accuracy, build_episode_graph, check_episode_gradients, classification_graph, classification_step, proto_episode_loss,
    prototype_logits, random_crop, relation_episode_loss, relation_logits, EpisodeGraph, GradCheckReport,
};
pub use store::{sample_episode, Episode, LabeledUtteranceStore, Utterance};
pub use train::{
    baseline_lr, evaluate_episodes, learning_rate, lr_schedule, smoothed_loss, train, LogEntry, TrainConfig,
    TrainLog, TrainMode,
};
