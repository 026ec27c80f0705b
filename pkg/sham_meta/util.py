import json
import math

import numpy as np

# seed used by every stochastic component when none is given
DEFAULT_SEED = 20200101


class ValidationError(ValueError):
    """Input data, configuration or model/dataset combination is invalid."""


class ModelError(RuntimeError):
    """Numerical failure while evaluating or sampling a model."""


class NonConvergenceWarning(UserWarning):
    """A fit finished, but its convergence diagnostics failed the thresholds."""


def to_float(value):
    """ Convert to float, accepting 'inf' / 'Infinity' spellings.

    :param value: number or string
    :type value: numeric or str
    :raises ValidationError: if value can not be converted
    :return: converted value
    :rtype: float
    """

    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        if v in ("-inf", "-infinity"):
            return -math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"not a number: {value!r}")


def to_int(value):
    """ Convert to int. Accepts integral floats like 32.0, rejects 32.5.

    :param value: number or string
    :type value: numeric or str
    :raises ValidationError: if value is not integral
    :return: converted value
    :rtype: int
    """

    if isinstance(value, bool):
        raise ValidationError(f"not an integer: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
    f = to_float(value)
    if not math.isfinite(f) or not f.is_integer():
        raise ValidationError(f"not an integer: {value!r}")
    return int(f)


def set_attr_from_dict(source, target, keys, optional_keys):
    """ Set attributes of `target` from a `source` dictionary.

    None values and empty strings for optional keys are not converted.

    :param source: dictionary
    :type source: dict
    :param target: target object
    :type target: object
    :param keys: list of (name, conversion) tuples
    :type keys: list
    :param optional_keys: list of (name, conversion, default) tuples
    :type optional_keys: list
    :raises ValidationError: if a required key is missing or a value can not be converted
    """

    for n, conversion in keys:
        if n not in source or source[n] is None or source[n] == "":
            raise ValidationError(f"{n}: missing required field")
        try:
            setattr(target, n, conversion(source[n]))
        except ValidationError as e:
            raise ValidationError(f"{n}: {e}")
        except (TypeError, ValueError):
            raise ValidationError(f"{n}: invalid value {source[n]!r}")
    for n, conversion, default in optional_keys:
        if n not in source or source[n] is None or source[n] == "":
            setattr(target, n, default)
        else:
            try:
                setattr(target, n, conversion(source[n]))
            except ValidationError as e:
                raise ValidationError(f"{n}: {e}")
            except (TypeError, ValueError):
                raise ValidationError(f"{n}: invalid value {source[n]!r}")


def check_schema_version(obj, supported=(1,)):
    """ Reject JSON configuration objects of an unknown schema version.

    A missing version is read as the current one.

    :param obj: parsed JSON object
    :type obj: dict
    :param supported: accepted versions
    :type supported: tuple
    :raises ValidationError: if the version is not supported
    """

    version = obj.get("schema_version", supported[-1])
    if version not in supported:
        raise ValidationError(f"unsupported schema_version {version!r}")


def read_json_config(path):
    """ Read a versioned JSON configuration file.

    :param path: JSON file
    :type path: str or Path
    :raises ValidationError: if the file can not be read or parsed
    :return: parsed object
    :rtype: dict
    """

    try:
        with open(path, 'r', encoding='utf-8') as f:
            obj = json.load(f)
    except OSError as e:
        raise ValidationError(f"can not read {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})")
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    check_schema_version(obj)
    return obj


def set_options_from_config(args, check=None, verbose=True):
    """ Update given options from config file.

    Read config file, try to parse options, ignore comment lines (begin with #).

    :param args: input arguments
    :type args: argparse.Namespace
    :param check: check config options against argparser
    :type check: argparse.ArgumentParser
    :param verbose: gives final overview of arguments
    :type verbose: bool
    :raises ValidationError: if an unknown option is given or a value fails the parser's check
    """

    if "config" in args and args.config is not None:
        try:
            with open(args.config, 'r', encoding='utf-8') as f:
                lines = f.readlines()
        except OSError as e:
            raise ValidationError(f"can not read config {args.config}: {e.strerror}")
        for line_no, line in enumerate(lines, start=1):
            line = line.strip()
            if line.startswith('#') or len(line) == 0:
                # comment or empty line
                continue
            if '=' not in line:
                raise ValidationError(f"{args.config}, line {line_no}: expected key = value")
            k, v = line.split('=', 1)
            k = k.strip().replace('-', '_')
            v = v.strip()
            try:
                # option may be special: number, array, etc.
                v = json.loads(v)
            except ValueError:
                # or not
                pass
            if check is not None:
                # find action by name
                try:
                    action = [a for a in check._actions if a.dest == k][0]
                except IndexError:
                    raise ValidationError(f"Unknown option {k}")
                # check each item in list individually
                v_list = [v] if type(v) is not list else v
                checked = []
                for v_item in v_list:
                    try:
                        if action.type is not None:
                            v_item = action.type(v_item)
                        check._check_value(action, v_item)
                    except Exception as e:
                        raise ValidationError(f"Failed check {k}: {v} ({e})")
                    checked.append(v_item)
                if type(v) is list:
                    v = checked
                elif action.type is not None:
                    v = checked[0]
            vars(args)[k] = v

        # Give overview of options
        if verbose:
            print("Options: {}".format(vars(args)))


def make_rng(seed, *keys):
    """ Independent random stream for (seed, key...) such as (seed, chain index).

    :param seed: base seed
    :type seed: int
    :param keys: stream keys, non-negative integers
    :type keys: int
    :return: random generator
    :rtype: numpy.random.Generator
    """

    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def progress_bar(step_i, n_steps, width=10):
    """ Print a progress bar like [###.......] when a new full step is reached.

    :param step_i: index of the finished step
    :type step_i: int
    :param n_steps: total number of steps
    :type n_steps: int
    :param width: number of characters
    :type width: int
    """

    display_step = n_steps / (width + 1)
    # only print full steps
    if step_i // display_step != (step_i - 1) // display_step or step_i == n_steps - 1:
        progress = width * (step_i + 1) // n_steps
        end = "\n" if step_i == n_steps - 1 else "\r"
        print("[{}{}]".format('#' * progress, '.' * (width - progress)), end=end, flush=True)

