"""
Tests for the ConfigurationManager class.
"""

import configparser
import tempfile
import unittest

from mtbart.cli import read_args
from mtbart.configuration_manager import ConfigurationManager

INI = """
[DEFAULT]
Seed=7
Threads=2
Debug=False
Replications=50
BootstrapReplicates=150
Methods=ra, bart

[METHOD bart]
Trees=20
Iterations=400
BurnIn=100

[METHOD vm]
Caliper=0.1
"""


def parse_ini(text):
    ini = configparser.ConfigParser()
    ini.optionxform = str
    ini.read_string(text)
    methods = {section[len('METHOD'):].strip(): ini[section]
               for section in ini.sections() if section.startswith('METHOD')}
    return ini['DEFAULT'], methods


class TestConfigurationManager(unittest.TestCase):
    """
    Test the ConfigurationManager class
    """
    def test_update_from_config(self):
        """Run settings come from [DEFAULT], method options from the METHOD sections."""
        configuration_manager = ConfigurationManager()
        configuration_manager.update_from_config(*parse_ini(INI))
        self.assertEqual(configuration_manager.seed, 7)
        self.assertEqual(configuration_manager.threads, 2)
        self.assertEqual(configuration_manager.replications, 50)
        self.assertEqual(configuration_manager.bootstrap_replicates, 150)
        self.assertEqual(configuration_manager.methods, ['ra', 'bart'])
        bart = configuration_manager.method_options['bart']
        self.assertEqual((bart.trees, bart.iterations, bart.burn_in), (20, 400, 100))
        self.assertEqual(configuration_manager.method_options['vm'].caliper, 0.1)

    def test_unknown_method_option(self):
        """A misspelled option key is reported."""
        configuration_manager = ConfigurationManager()
        with self.assertRaises(ValueError):
            configuration_manager.update_from_config(
                *parse_ini("[DEFAULT]\n[METHOD bart]\nTree=20\n"))

    def test_inconsistent_options(self):
        """A burn-in longer than the run is caught once all options are read."""
        configuration_manager = ConfigurationManager()
        with self.assertRaises(ValueError):
            configuration_manager.update_from_config(
                *parse_ini("[DEFAULT]\n[METHOD bart]\nIterations=100\nBurnIn=200\n"))

    def test_args_override_config(self):
        """Command line arguments take precedence over the configuration file."""
        configuration_manager = ConfigurationManager()
        configuration_manager.update_from_config(*parse_ini(INI))
        with tempfile.TemporaryDirectory() as directory:
            args = read_args(['simulate', '--seed', '3', '--methods', 'iptw-mlr,vm',
                              '--scenario', 'sim1_I', '--option', 'bart.K=1.5',
                              '--option', 'vm.Clusters=3', '--out', directory,
                              '--estimands', 'ATT(1|1,2)', 'ATT(1|1,3)'])
            configuration_manager.update_from_args(args)
            self.assertEqual(configuration_manager.out_dir, directory)
        self.assertEqual(configuration_manager.seed, 3)
        self.assertEqual(configuration_manager.threads, 2)
        self.assertEqual(configuration_manager.methods, ['iptw-mlr', 'vm'])
        self.assertEqual(configuration_manager.scenario, 'sim1_I')
        self.assertEqual(configuration_manager.estimands, ['ATT(1|1,2)', 'ATT(1|1,3)'])
        self.assertEqual(configuration_manager.method_options['bart'].k, 1.5)
        self.assertEqual(configuration_manager.method_options['bart'].trees, 20)
        self.assertEqual(configuration_manager.method_options['vm'].clusters, 3)

    def test_malformed_option(self):
        """Overrides must be written method.Key=value."""
        configuration_manager = ConfigurationManager()
        for option in ('bart.K', 'K=1.5', 'psm.K=1'):
            with self.subTest(option=option):
                with self.assertRaises(ValueError):
                    configuration_manager.update_from_args(
                        read_args(['estimate', '--option', option]))

    def test_setters(self):
        """Invalid run settings raise ValueError."""
        configuration_manager = ConfigurationManager()
        with self.assertRaises(ValueError):
            configuration_manager.set_methods('ra,ra')
        with self.assertRaises(ValueError):
            configuration_manager.set_methods('ra,psm')
        with self.assertRaises(ValueError):
            configuration_manager.set_sizes('100,200')
        with self.assertRaises(ValueError):
            configuration_manager.set_bootstrap_replicates(10)
        with self.assertRaises(ValueError):
            configuration_manager.set_data('/nonexistent/data.csv')
        configuration_manager.set_sizes('300, 100, 200')
        self.assertEqual(configuration_manager.sizes, [300, 100, 200])


if __name__ == '__main__':
    unittest.main()
