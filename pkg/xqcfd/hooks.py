app_name = "xqcfd"
app_title = "XQC from Demonstrations"
app_publisher = "xqcfd contributors"
app_description = "KL-regularized actor-critic learning from expert demonstrations at desk scale."
app_license = "mit"

# Registries
# ----------
# Public identifiers resolved to dotted paths through `xqcfd.utils.get_attr`.
# A new environment (or policy architecture) is added by registering it here.

environments = {
	"point-reach-v0": "xqcfd.envs.envs.PointReach",
	"obstructed-reach-v0": "xqcfd.envs.envs.ObstructedReach",
}

experts = {
	"point-reach-v0": "xqcfd.envs.expert.point_reach_expert",
	"obstructed-reach-v0": "xqcfd.envs.expert.obstructed_reach_expert",
}

policy_kinds = {
	"hetstat": "xqcfd.policy.policy.HetStatPolicy",
	"mlp": "xqcfd.policy.policy.MlpPolicy",
}

commands = {
	"gen-demos": "xqcfd.cli.cli.cmd_gen_demos",
	"pretrain": "xqcfd.cli.cli.cmd_pretrain",
	"train": "xqcfd.cli.cli.cmd_train",
	"aggregate": "xqcfd.cli.cli.cmd_aggregate",
	"plot": "xqcfd.cli.cli.cmd_plot",
	"sweep-temperature": "xqcfd.cli.cli.cmd_sweep_temperature",
	"sweep-demos": "xqcfd.cli.cli.cmd_sweep_demos",
}

# Checkpoint containers
# ---------------------

policy_checkpoint_magic = b"XQCP"
critic_checkpoint_magic = b"XQCC"
checkpoint_version = 1
