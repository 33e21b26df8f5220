"""
This class is used to validate and store the configuration of a run
"""
import os

from platformdirs import user_data_dir

from mtbart.method_options import MethodOptions
from mtbart.methods import METHOD_NAMES

# INI key (and --option key) -> MethodOptions setter
OPTION_SETTERS = {
    'Trees': 'set_trees',
    'Iterations': 'set_iterations',
    'BurnIn': 'set_burn_in',
    'K': 'set_k',
    'PerPair': 'set_per_pair',
    'Shrinkage': 'set_shrinkage',
    'MaxDepth': 'set_max_depth',
    'MaxIterations': 'set_max_iterations',
    'EvalStride': 'set_eval_stride',
    'RidgePenalty': 'set_ridge_penalty',
    'PriorScale': 'set_prior_scale',
    'Draws': 'set_draws',
    'PerArm': 'set_per_arm',
    'Caliper': 'set_caliper',
    'Clusters': 'set_clusters',
    'ClusterOn': 'set_cluster_on',
    'TrimLower': 'set_trim_lower',
    'TrimUpper': 'set_trim_upper',
    'TrimPerGroup': 'set_trim_per_group',
    'BootstrapReplicates': 'set_bootstrap_replicates',
}

CONVERGENCE_SIZES = (2900, 5800, 8700, 11600, 14500, 17400)


def _split(value):
    if isinstance(value, str):
        value = value.split(',')
    return [item.strip() for item in value if item and item.strip()]


class ConfigurationManager:
    """
    This class is used to validate and store the configuration of a run
    """
    def __init__(self):
        # default configuration
        self.seed = 0
        self.threads = 1
        self.out_dir = user_data_dir('mtbart', 'mtbart')
        self.debug = False
        self.replications = 200
        self.bootstrap_replicates = 200
        self.methods = []
        self.estimands = []
        self.data = None
        self.schema = None
        self.scenario = None
        self.sizes = list(CONVERGENCE_SIZES)
        self.superpopulation = False
        self.gps_model = 'gbm'
        self.method_options = {}

    def set_seed(self, seed):
        """
        Set the master seed of the run
        """
        seed = int(seed)
        if seed < 0:
            raise ValueError('Seed must not be negative')
        self.seed = seed

    def set_threads(self, threads):
        """
        Set the maximum number of parallel workers
        """
        threads = int(threads)
        if threads < 1:
            raise ValueError('Threads must be a positive integer')
        self.threads = threads

    def set_out_dir(self, out_dir):
        """
        Set the output directory
        """
        if out_dir == '':
            raise ValueError('Output directory must not be empty')
        self.out_dir = out_dir

    def set_debug(self, debug):
        """
        Enable or disable debug mode
        """
        self.debug = debug

    def set_replications(self, replications):
        replications = int(replications)
        if replications < 1:
            raise ValueError('Replications must be a positive integer')
        self.replications = replications

    def set_bootstrap_replicates(self, bootstrap_replicates):
        bootstrap_replicates = int(bootstrap_replicates)
        if bootstrap_replicates < 100:
            raise ValueError('BootstrapReplicates must be at least 100')
        self.bootstrap_replicates = bootstrap_replicates

    def set_methods(self, methods):
        """
        Set the list of methods, given as a list or a comma separated string
        """
        methods = _split(methods)
        unknown = [method for method in methods if method not in METHOD_NAMES]
        if unknown:
            raise ValueError(f'Unknown methods {unknown}; valid methods: {", ".join(METHOD_NAMES)}')
        if len(set(methods)) != len(methods):
            raise ValueError('Methods must not repeat')
        self.methods = methods

    def set_estimands(self, estimands):
        """
        Set the estimands as strings such as ATT(1|1,2); they are parsed once the
        number of treatments is known.
        """
        self.estimands = [estimand.strip() for estimand in estimands if estimand.strip()]

    def set_data(self, data):
        if not os.path.exists(data):
            raise ValueError(f'Dataset file {data} does not exist')
        self.data = data

    def set_schema(self, schema):
        if not os.path.exists(schema):
            raise ValueError(f'Schema file {schema} does not exist')
        self.schema = schema

    def set_sizes(self, sizes):
        sizes = [int(size) for size in _split(sizes)]
        if len(sizes) < 3 or min(sizes) < 1:
            raise ValueError('At least three positive sample sizes are required')
        self.sizes = sizes

    def set_gps_model(self, gps_model):
        if gps_model not in ('mlr', 'gbm'):
            raise ValueError('GPS model must be mlr or gbm')
        self.gps_model = gps_model

    def options_for(self, method):
        """
        The options of a method, created with the defaults on first use
        """
        if method not in self.method_options:
            self.method_options[method] = MethodOptions()
        return self.method_options[method]

    def set_method_option(self, method, key, value):
        """
        Set one option of one method, e.g. ('bart', 'K', '1.5')
        """
        if method not in METHOD_NAMES:
            raise ValueError(f'Unknown method {method} in option {key}')
        if key not in OPTION_SETTERS:
            raise ValueError(f'Unknown method option {key}; valid options: '
                             f'{", ".join(OPTION_SETTERS)}')
        getattr(self.options_for(method), OPTION_SETTERS[key])(value)

    def update_from_args(self, cmd_args):
        # update the configuration from the command line arguments
        if cmd_args.seed is not None:
            self.set_seed(cmd_args.seed)
        if cmd_args.threads:
            self.set_threads(cmd_args.threads)
        if cmd_args.out:
            self.set_out_dir(cmd_args.out)
        if cmd_args.debug:
            self.set_debug(True)
        if cmd_args.replications is not None:
            self.set_replications(cmd_args.replications)
        if cmd_args.bootstrap_replicates:
            self.set_bootstrap_replicates(cmd_args.bootstrap_replicates)
        if cmd_args.methods:
            self.set_methods(cmd_args.methods)
        if cmd_args.estimands:
            self.set_estimands(cmd_args.estimands)
        if cmd_args.data:
            self.set_data(cmd_args.data)
        if cmd_args.schema:
            self.set_schema(cmd_args.schema)
        if cmd_args.scenario:
            self.scenario = cmd_args.scenario
        if cmd_args.sizes:
            self.set_sizes(cmd_args.sizes)
        if cmd_args.superpopulation:
            self.superpopulation = True
        if cmd_args.gps_model:
            self.set_gps_model(cmd_args.gps_model)

        # per-method overrides given as method.Key=value
        for option in cmd_args.option or []:
            name, _, value = option.partition('=')
            method, _, key = name.partition('.')
            if not value or not key:
                raise ValueError(f'Method options are written method.Key=value, got {option}')
            self.set_method_option(method.strip(), key.strip(), value.strip())

        for options in self.method_options.values():
            options.validate()

    def update_from_config(self, default_config, method_configs):
        """
        Update the configuration from the configuration file
        """
        if 'Seed' in default_config:
            self.set_seed(default_config['Seed'])
        if 'Threads' in default_config:
            self.set_threads(default_config['Threads'])
        if 'OutDir' in default_config:
            self.set_out_dir(default_config['OutDir'])
        if 'Debug' in default_config:
            self.set_debug(default_config['Debug'] == 'True')
        if 'Replications' in default_config:
            self.set_replications(default_config['Replications'])
        if 'BootstrapReplicates' in default_config:
            self.set_bootstrap_replicates(default_config['BootstrapReplicates'])
        if 'Methods' in default_config:
            self.set_methods(default_config['Methods'])

        for method, method_config in method_configs.items():
            for key in method_config:
                if key in default_config and method_config[key] == default_config[key]:
                    # inherited from [DEFAULT]
                    continue
                self.set_method_option(method, key, method_config[key])

        for options in self.method_options.values():
            options.validate()
