from selshare.cli.app import cli


def main():
    cli(prog_name="selshare")


if __name__ == "__main__":
    main()
