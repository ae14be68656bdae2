"""Command-line front end: ``recurnet <command> ...``"""
