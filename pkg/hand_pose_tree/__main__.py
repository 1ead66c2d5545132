# hand_pose_tree/__main__.py

from hand_pose_tree.eval_cli.main import main

if __name__ == "__main__":
    main()
