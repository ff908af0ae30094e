#!/usr/bin/env python3
"""
Test runner for the AS-CAL toolkit
"""
import subprocess
import sys


def run_tests(include_slow: bool = False):
    """Run the test suite; the synthetic end-to-end experiments only with --slow"""
    print("Running AS-CAL tests...")
    print("=" * 50)

    command = [sys.executable, '-m', 'pytest', 'tests/']
    if not include_slow:
        command += ['-m', 'not slow']

    try:
        result = subprocess.run(command, capture_output=True, text=True)

        print(result.stdout)
        if result.stderr:
            print("STDERR:", result.stderr)

        print(f"\n{'='*50}")
        print(f"Tests completed with exit code: {result.returncode}")

        if result.returncode == 0:
            print("All tests passed!")
        else:
            print("Some tests failed!")

        return result.returncode

    except Exception as e:
        print(f"Error running tests: {e}")
        return 1


if __name__ == "__main__":
    exit_code = run_tests(include_slow='--slow' in sys.argv[1:])
    sys.exit(exit_code)
