# Generated by Django 6.0 on 2026-10-18 09:12

import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):
    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="Run",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "uid",
                    models.UUIDField(
                        db_index=True, default=uuid.uuid4, editable=False, unique=True
                    ),
                ),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("gen_trace", "Generate trace"),
                            ("train", "Train"),
                            ("eval", "Evaluate"),
                            ("compare", "Compare"),
                            ("ablate", "Ablate"),
                        ],
                        max_length=10,
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Pending"),
                            ("running", "Running"),
                            ("completed", "Completed"),
                            ("error", "Error"),
                        ],
                        default="pending",
                        max_length=10,
                    ),
                ),
                (
                    "config",
                    models.JSONField(
                        help_text="Resolved run configuration, overrides applied."
                    ),
                ),
                ("manifest", models.JSONField(blank=True, null=True)),
                ("out_dir", models.CharField(max_length=500)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="EpisodeRecord",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("policy", models.CharField(max_length=50)),
                ("scenario", models.CharField(max_length=100)),
                ("warm_start", models.FloatField()),
                ("seed", models.IntegerField()),
                ("scheduled_length", models.IntegerField()),
                ("avg_cpu_utilization", models.FloatField()),
                ("income", models.FloatField()),
                ("steps", models.IntegerField()),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="episodes",
                        to="experiments.run",
                    ),
                ),
            ],
            options={
                "ordering": ["run", "scenario", "warm_start", "policy", "seed"],
            },
        ),
    ]
